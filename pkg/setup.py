from setuptools import setup, find_packages

setup(
    name="rslba",
    version="0.1.0",
    description="Rolling-shutter line bundle adjustment: simulation, solver, evaluation and degeneracy studies",
    author="Henry Huang",
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=[
        "numpy>=1.24.0",
        "scipy>=1.10.0",
        "python-dotenv>=1.0.0",
        "click>=8.1.0",
        "colorama>=0.4.0",
        "tabulate>=0.9.0",
        "pydantic>=2.5.0",
    ],
    extras_require={
        "test": ["pytest>=7.4.0"],
    },
    entry_points={
        "console_scripts": [
            "rslba=src.main:cli",
        ],
    },
    python_requires=">=3.8",
)
