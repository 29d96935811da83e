from setuptools import setup, find_packages

setup(
    name="ringformer",
    version="0.1.0",
    description="RingFormer vocoder inference engine with ring attention and evaluation tools",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    python_requires=">=3.8",
    install_requires=[
        "numpy",
        "scipy",
        "librosa",
        "tqdm",
        "pandas",
        "matplotlib",
    ],
    extras_require={
        "test": ["pytest"],
    },
    include_package_data=True,
    entry_points={
        "console_scripts": [
            "ringformer=ringformer.cli:main",
        ]
    },
)
