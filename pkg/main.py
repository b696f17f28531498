"""
Entry point for the evanscope command line
Checks the numerical stack, then hands over to evanscope.cli
"""

import sys


def check_requirements() -> bool:
    """Check if required packages are installed"""
    required_packages = ["numpy", "scipy", "pandas", "pydantic", "tqdm"]
    missing_packages = []
    for package in required_packages:
        try:
            __import__(package)
        except ImportError:
            missing_packages.append(package)

    if missing_packages:
        print(f"Missing packages: {', '.join(missing_packages)}")
        print("Please install them with: pip install -r requirements.txt")
        return False
    return True


def main() -> int:
    if not check_requirements():
        return 3
    from evanscope.cli import main as cli_main
    return cli_main()


if __name__ == "__main__":
    sys.exit(main())
