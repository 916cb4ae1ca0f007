#! /usr/bin/env python

import re

import setuptools

# read the version without importing the package and its torch dependency
with open('lesion_ensemble/__init__.py') as f:
    version = re.search(r'__version__ = "([^"]+)"', f.read()).group(1)

with open('HISTORY.rst') as f:
    history = f.read()

description = 'Segmentation-pretrained DenseNet ensemble for dermoscopic skin lesion classification'

setuptools.setup(
        name='lesion-ensemble',
        version=version,
        description='{0}\n\n{1}'.format(description, history),
        packages=['lesion_ensemble'],
        python_requires='>=3.8',
        install_requires=[
            'numpy',
            'pandas>=1.4',
            'torch>=1.13',
            'opencv-python-headless',
            'Pillow',
            'scikit-learn',
            'matplotlib',
            'PyYAML',
        ],
        entry_points={
            'console_scripts': ['lesion-ensemble = lesion_ensemble.cli:main'],
        },
        license='MIT'
)
