#!/usr/bin/env python3
"""
Interpreter and dependency report, written into run manifests so a run can be
replayed on the same stack.
"""

import logging
import platform
import sys
from importlib import metadata

logger = logging.getLogger(__name__)

REQUIRED_PACKAGES = ['numpy', 'scipy', 'pandas', 'openpyxl', 'dateparser', 'plotly', 'tqdm']


def check_python_version():
    """Check if Python version is compatible"""
    version = sys.version_info
    if version.major < 3 or (version.major == 3 and version.minor < 9):
        logger.error(f"Python {version.major}.{version.minor} detected. Python 3.9+ required.")
        return False
    return True


def dependency_versions(packages=None):
    """Installed version per package; None when it is missing"""
    versions = {}
    for package in packages or REQUIRED_PACKAGES:
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = None
    return versions


def environment_report():
    return {
        'python': platform.python_version(),
        'packages': dependency_versions(),
    }


def check_dependencies():
    """Log missing packages; True when everything is installed"""
    missing = [name for name, version in dependency_versions().items() if version is None]
    if missing:
        logger.warning(f"Missing packages: {', '.join(missing)}. Run: pip install -r requirements.txt")
        return False
    return True


if __name__ == '__main__':
    logging.basicConfig(level=logging.INFO)
    ok = check_python_version() and check_dependencies()
    for name, version in environment_report()['packages'].items():
        print(f"{name:12s} {version or 'missing'}")
    sys.exit(0 if ok else 1)
