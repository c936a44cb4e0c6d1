from setuptools import setup, find_packages


VERSION = "0.1.0"
DESCRIPTION = "meshtok"
LONG_DESCRIPTION = (
    "Tokenised human mesh recovery: a vector-quantized mesh autoencoder and an image-to-token predictor."
)

setup(
    name="meshtok",
    version=VERSION,
    description=DESCRIPTION,
    long_description=LONG_DESCRIPTION,
    packages=find_packages(exclude="build"),
    package_data={"": ["*.json", "*.yaml"]},
    python_requires=">=3.9",
    install_requires=[
        "numpy",
        "scipy",
        "torch>=2.0",
        "einops",
        "trimesh",
        "pyyaml",
        "tqdm",
        "matplotlib",
        "timeout-decorator",
    ],
    extras_require={"test": ["pytest"]},
    entry_points={"console_scripts": ["meshtok=meshtok.run_meshtok:main"]},
)
