# -*- coding: utf-8 -*-
import re

from setuptools import setup

# bcrf imports numpy at package import, so read the version without it
with open('bcrf/__init__.py') as f:
    version = re.search(r"__version__ = '([^']+)'", f.read()).group(1)

setup(
    name='bcrf',
    version=version,
    author='bcrf developers',
    packages=['bcrf'],
    license='see LICENSE',
    description='Joint semantic and instance CRF inference for panoptic '
                'segmentation',
    long_description=open('README.rst').read(),
    install_requires=[
        'numpy>=1.17',
        'scipy>=1.4',
    ],
    test_suite='tests',
    entry_points={
        'console_scripts': [
            'bcrf = bcrf.cli:main',
        ],
    },
    classifiers=[
        'Intended Audience :: Science/Research',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Image Recognition',
    ],
)
