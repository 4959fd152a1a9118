from setuptools import find_packages, setup

with open("requirements.txt") as fh:
    requirements = [line.strip() for line in fh if line.strip() and not line.startswith("pytest")]

setup(
    name='maggie',
    version='0.1.0',
    description='Mask-guided instance matting for images and short videos',
    packages=find_packages(include=['maggie', 'maggie.*']),
    python_requires='>=3.10',
    install_requires=requirements,
    extras_require={'test': ['pytest']},
    entry_points={
        'console_scripts': [
            'maggie = maggie.cli:main',
        ],
    },
)
