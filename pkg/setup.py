from setuptools import setup, find_packages

setup(
    name="drlab",
    version="0.1.0",
    description="Desk-scale reward search, reward-aware physics prior and domain-randomization pipeline",
    packages=find_packages(exclude=["tests", "tests.*", "experiments", "experiments.*", "examples", "examples.*"]),
    install_requires=[
        "fastapi>=0.104.1",
        "uvicorn>=0.24.0",
        "numpy>=1.24.3",
        "scipy>=1.11.1",
        "pydantic>=2.4.2",
        "torch>=1.9.0",
        "python-dotenv>=1.0.0",
        "requests>=2.31.0",
    ],
    extras_require={"test": ["pytest>=7.4.0"]},
    entry_points={"console_scripts": ["drlab=drlab.pipeline.cli:main"]},
    python_requires=">=3.9",
)
