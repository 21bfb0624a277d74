"""Fisher-information regularized JKO solver for Wasserstein gradient flows

See README.md.
"""

from codecs import open
from os import path

from setuptools import setup

here = path.abspath(path.dirname(__file__))
with open(path.join(here, "README.md"), encoding="utf-8") as f:
    long_description = f.read()

f8 = "flake8>=6,<8"


setup(
    name="wgf_jko",
    use_scm_version={
        "version_scheme": "post-release",
        "tag_regex": r"^wgf-jko-(?P<prefix>v)?(?P<version>[^\+]+)(?P<suffix>.*)?$",
        "git_describe_command": "git describe --dirty --tags --long --match wgf-jko-v*.*",
        "fallback_version": "0.0.0",
    },
    description="Fisher-information regularized JKO solver for Wasserstein gradient flows",
    long_description=long_description,
    long_description_content_type="text/markdown",
    author="wgf-jko developers",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3.11",
    ],
    keywords="wasserstein gradient-flow jko fisher-information sqp interior-point",
    packages=["wgf", "wgf.jko"],
    package_dir={"wgf": "python/wgf"},
    python_requires=">=3.10",
    install_requires=[
        "numpy>=1.24",
        "scipy>=1.10",
        "pyyaml>=6.0",
    ],
    setup_requires=["setuptools_scm"],
    tests_require=[
        "pytest>=7.0",
        "pytest-mock>=3.10",
        f8,
    ],
    extras_require={
        "test": ["pytest>=7.0", "pytest-mock>=3.10"],
        "lint": [f8],
    },
    scripts=[
        "bin/wgf-jko",
    ],
)
