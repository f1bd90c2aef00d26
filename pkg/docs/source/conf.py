#!/usr/bin/env python3
# -*- coding: utf-8 -*-
#
# mop-kernel documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

# -- General configuration ------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.viewcode",
    "sphinx.ext.napoleon",
    "sphinx.ext.mathjax",
]

templates_path = ["_templates"]

source_suffix = ".rst"

master_doc = "index"

# General information about the project.
project = "mop_kernel"
copyright = "2026, mop-kernel developers"
author = "mop-kernel developers"

# The version info for the project you're documenting, acts as replacement for
# |version| and |release|, also used in various other places throughout the
# built documents.
import mop_kernel  # noqa: E402


version = release = mop_kernel.__version__

language = "en"

exclude_patterns = []  # type: ignore

pygments_style = "sphinx"

todo_include_todos = False


# -- Options for HTML output ----------------------------------------------

html_theme = "alabaster"

html_theme_options = {
    "logo_name": "mop-kernel",
    "fixed_sidebar": True,
}

html_static_path = ["_static"]

html_sidebars = {
    "**": [
        "about.html",
        "navigation.html",
        "relations.html",  # needs 'show_related': True theme option to display
        "searchbox.html",
    ]
}


# -- Options for HTMLHelp output ------------------------------------------

htmlhelp_basename = "mop-kerneldoc"


# -- Options for manual page output ---------------------------------------

man_pages = [(master_doc, "mop-kernel", "mop-kernel Documentation", [author], 1)]
