#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Version command."""
import platform

import click
import numpy as np

from uvbody.cli.cli import Config
from uvbody.vars import VERSION


@click.command()
@click.pass_context
def cli(ctx):
    """
    Print version and exit.

    Use --verbose to get extra platform info.
    """

    config: Config = ctx.obj
    if config.verbose:
        click.echo(
            f"uvbody {VERSION} with numpy {np.__version__} and "
            f"Python {platform.python_version()}"
        )
    else:
        click.echo(VERSION)
