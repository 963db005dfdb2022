"""Key-value config files: INI sections, or a bare list of ``key = value`` lines."""

from __future__ import annotations

import configparser


def parse_ini(text: str, default_section: str) -> configparser.ConfigParser:
    """Parse ``text``; when it has no section header the whole file is ``default_section``."""
    def parser():
        return configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))

    cp = parser()
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError:
        cp = parser()
        cp.read_string(f"[{default_section}]\n{text}")
    if not cp.sections():
        cp.add_section(default_section)
    return cp
