from setuptools import find_packages, setup

setup(
    name="quenched-lab",
    version="0.1.0",
    description="Quenched thermodynamic formalism for random open interval maps",
    author="Daniel T Sasser II",
    packages=find_packages(include=["quenched_lab*"]),
    install_requires=[
        "numpy>=1.24.0",
        "scipy>=1.10.0",
        "cachetools>=5.0.0",
    ],
    entry_points={
        "console_scripts": [
            "quenched-lab=quenched_lab.__main__:main",
        ],
    },
    python_requires=">=3.10",
    extras_require={
        "dev": [
            "pytest",
            "pytest-cov",
            "build",
        ],
    },
)
