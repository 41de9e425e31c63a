# -*- coding: utf-8 -*-
#
# bcrf documentation build configuration file.

import sys
import os

sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

import bcrf

extensions = ['sphinx.ext.autodoc',
              'sphinx.ext.doctest',
              'sphinx.ext.intersphinx',
              'sphinx.ext.mathjax',
              'sphinx.ext.viewcode']

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = u'bcrf'
copyright = u'bcrf developers'

version = bcrf.__version__
release = bcrf.__version__

exclude_patterns = ['_build']
pygments_style = 'sphinx'

# members appear in source order, which follows the energy term order
autodoc_member_order = 'bysource'

html_theme = 'default'
html_static_path = ['_static']
htmlhelp_basename = 'bcrfdoc'

latex_documents = [('index',
                    'bcrf.tex',
                    u'bcrf Documentation',
                    u'bcrf developers',
                    'manual'), ]

man_pages = [
    ('index', 'bcrf', u'bcrf Documentation',
     [u'bcrf developers'], 1)
]

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable', None),
    'scipy': ('https://docs.scipy.org/doc/scipy', None),
}
