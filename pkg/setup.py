"""Build script: compiles the optional interpreter fast path.

The package is pure Python; src/gradc/vm/_evalcore_cy.pyx is an optional
accelerator for the interpreter dispatch loop. If Cython or a C compiler is
unavailable the extension is skipped and the pure-Python core is used.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("GRADC_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            ["src/gradc/vm/_evalcore_cy.pyx"],
            language_level=3,
        )
    except ImportError:
        pass

setup(ext_modules=ext_modules)
