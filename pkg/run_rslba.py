#!/usr/bin/env python3
"""
Simple runner script for the rolling-shutter line bundle adjustment CLI
Usage: python run_rslba.py simulate --out results/cube
"""

import sys
import subprocess

def main():
    """Run the rslba CLI"""
    try:
        result = subprocess.run([sys.executable, '-m', 'src.main'] + sys.argv[1:])
        sys.exit(result.returncode)
    except KeyboardInterrupt:
        print("\nInterrupted by user")
        sys.exit(1)

if __name__ == '__main__':
    main()
