#!/usr/bin/env python3
"""
Main entry point for the NV control toolkit
Runs the batch front end, or lists the available commands when called bare
"""
import sys

from src.cli import main as cli_main


def usage():
    """Display available commands and usage"""
    print("\n" + "=" * 60)
    print("NV QUANTUM OPTIMAL CONTROL")
    print("=" * 60)
    print("\nAvailable Commands:")
    print("-" * 40)

    print("\n1. SIMULATE:")
    print("   python run.py simulate --config config/examples/rabi.json")

    print("\n2. OPTIMIZE:")
    print("   python run.py optimize --preset pi_pulse_grape")
    print("   python run.py optimize --config config/examples/hadamard_dcrab.json --seed 7")

    print("\n3. SENSE:")
    print("   python run.py sense --config config/examples/echo_sweep.json")

    print("\n4. LIMITS:")
    print("   python run.py limits --config config/examples/limits_qubit.json")

    print("\n5. PRESETS AND TESTS:")
    print("   python run.py --list-presets")
    print("   pytest tests/")

    print("\n" + "=" * 60)
    print("For detailed documentation, see README.md")
    print("For project structure, see PROJECT_STRUCTURE.md")
    print("=" * 60 + "\n")


def main():
    if len(sys.argv) == 1:
        usage()
        return 0
    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
