#
# slimflow documentation build configuration file.
#

import os
import sys

sys.path.insert(0, os.path.abspath('..'))

from slimflow.core import __version__ as slimflow_version  # noqa: E402

# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.autosummary',
    'sphinx.ext.intersphinx',
    'sphinx.ext.mathjax',
    'sphinx.ext.napoleon',
    'sphinx.ext.viewcode',
    'releases',
]

source_suffix = '.rst'
master_doc = 'index'

project = 'slimflow'
copyright = '2026, The slimflow authors'
author = 'The slimflow authors'

version = '.'.join(slimflow_version.split('.')[:2])
release = slimflow_version

language = 'en'
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']
pygments_style = 'sphinx'

# -- Options for HTML output ----------------------------------------------

html_theme = 'sphinx_rtd_theme'
htmlhelp_basename = 'slimflowdoc'

# -- Options for manual page output ---------------------------------------

man_pages = [
    (master_doc, 'slimflow', 'slimflow Documentation',
     [author], 1)
]

autodoc_member_order = 'bysource'
intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable', None),
    'pandas': ('https://pandas.pydata.org/pandas-docs/stable', None),
}

# Changelog management

releases_unstable_prehistory = True
