#!/usr/bin/env python3
"""
qunet Setup Script

Installation script for the qunet qudit teleportation network simulator.
"""

from setuptools import setup
from pathlib import Path

# Read the README file for the long description
readme_file = Path(__file__).parent / "README.md"
long_description = readme_file.read_text(encoding="utf-8") if readme_file.exists() else ""

setup(
    name="qunet",
    version="0.1.0",
    description="qunet: state-vector simulator for qudit teleportation networks",
    long_description=long_description,
    long_description_content_type="text/markdown",
    py_modules=["qunet"],
    packages=["tools", "CLI"],
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Physics",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.22",
        "python-dotenv>=1.0",
        "jsonschema>=4.0",
    ],
    extras_require={
        "dev": [
            "pytest>=6.0",
            "pytest-cov>=4.1",
            "black>=21.0",
            "flake8>=3.8",
            "mypy>=0.900",
        ],
    },
    entry_points={
        "console_scripts": [
            "qunet=qunet:main",
        ],
    },
    include_package_data=True,
    data_files=[("schemas", ["schemas/report.schema.json"])],
    zip_safe=False,
    keywords="quantum qudit teleportation simulation",
)
