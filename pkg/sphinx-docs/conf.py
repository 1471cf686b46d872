# -*- coding: utf-8 -*-

from os.path import abspath, dirname
import re
import sys

import toml

path = dirname(dirname(abspath(__file__)))
sys.path.append(path)

project = "pydefgen"
slug = re.sub(r"\W+", "-", project.lower())
copyright = "2023, Steven Marks, TotalDebug"
author = "Steven Marks, TotalDebug"


# The short X.Y version
def get_version():
    with open("../pyproject.toml") as f:
        config = toml.load(f)
    return config["tool"]["poetry"]["version"]


version = get_version()
# The full version, including alpha/beta/rc tags
release = ""

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.coverage",
    "sphinx.ext.viewcode",
    "sphinx.ext.mathjax",
    "sphinx_rtd_theme",
    "sphinx.ext.napoleon",
    "sphinx.ext.autosectionlabel",
    "sphinxarg.ext",
    "myst_parser",
]

# -- Napoleon Settings -----------------------------------------------------
napoleon_google_docstring = True
napoleon_numpy_docstring = False
napoleon_include_init_with_doc = False
napoleon_include_private_with_doc = False
napoleon_include_special_with_doc = False
napoleon_use_ivar = True
napoleon_use_param = True
napoleon_use_rtype = True
autodoc_member_order = "bysource"
autodoc_typehints = "description"
autosectionlabel_prefix_document = True

templates_path = ["_templates"]
source_suffix = {".rst": "restructuredtext", ".md": "markdown"}

master_doc = "index"
language = "en"

exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]

pygments_style = "default"


html_theme = "sphinx_rtd_theme"
html_theme_options = {
    "navigation_depth": 4,
}

htmlhelp_basename = slug

man_pages = [("cli", slug, "Contrastive definition generation", [author], 1)]
