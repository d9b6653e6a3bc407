"""Setup configuration for fbf-lab."""

from setuptools import setup, find_packages

setup(
    name="fbf-lab",
    version="0.1.0",
    description="Variable-metric forward-backward-forward splitting with errors, and TV deblurring experiments",
    author="fbf-lab Team",
    packages=find_packages(include=["src", "src.*"]),
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.24.0",
        "scipy>=1.10.0",
        "pandas>=2.0.0",
        "rich>=13.0.0",
        "typer>=0.9.0",
        "pyyaml>=6.0",
        "python-dotenv>=1.0.0",
    ],
    extras_require={
        "dev": [
            "pytest>=7.4.0",
            "pytest-cov>=4.1.0",
            "black>=23.0.0",
            "ruff>=0.1.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "fbf-lab=src.ui.cli:main",
        ],
    },
)
