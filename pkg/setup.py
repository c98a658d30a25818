#!/usr/bin/env python

import setuptools

# this shim allows for editable installs when setup.cfg and pyproject.toml are in use.
if __name__ == "__main__":
    setuptools.setup()
