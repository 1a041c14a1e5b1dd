# Sphinx configuration for the advdrop documentation.
import sphinx_rtd_theme

import advdrop

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.intersphinx',
    'sphinx.ext.mathjax',
    'sphinx.ext.napoleon',
    'sphinx.ext.viewcode',
]

intersphinx_mapping = {
    'numpy': ('https://numpy.org/doc/stable/', None),
    'python': ('https://docs.python.org/3', None),
    'scipy': ('https://docs.scipy.org/doc/scipy/', None),
}

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = advdrop.__name__
author = advdrop.__author__
copyright = '2026, {}'.format(author)
version = '.'.join(advdrop.__version__.split('.', 2)[:2])
release = advdrop.__version__

language = 'en'
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']
highlight_language = 'python3'

html_theme = 'sphinx_rtd_theme'
html_theme_path = [sphinx_rtd_theme.get_html_theme_path()]
html_static_path = ['_static']
htmlhelp_basename = 'advdropdoc'

man_pages = [
    (master_doc, 'advdrop', 'advdrop Documentation', [author], 1),
]
