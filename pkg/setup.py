#!/usr/bin/env python3
"""
Setup script for the MoPA-PD planar workbench
"""

from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [
        line.split("#", 1)[0].strip() for line in fh
        if line.strip() and not line.startswith("#") and not line.startswith("pytest")
    ]

setup(
    name="mopa-pd",
    version="0.1.0",
    description="Motion-planner-augmented RL and policy distillation on planar obstructed manipulation tasks",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(include=["mopa_pd", "mopa_pd.*"]),
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
    python_requires=">=3.9",
    install_requires=requirements,
    extras_require={"test": ["pytest"]},
    entry_points={
        "console_scripts": [
            "mopa-pd=mopa_pd.cli:main",
        ],
    },
    include_package_data=True,
    package_data={
        "mopa_pd": ["configs/*.cfg"],
    },
)
