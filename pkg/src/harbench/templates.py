# src/harbench/templates.py
"""
Report templates

A template is a markdown file with a YAML
frontmatter block holding its settings, rendered
with Jinja2.
"""

import os
from dataclasses import dataclass, field
from typing import Any

import frontmatter
from jinja2 import StrictUndefined, Template
from loguru import logger

from harbench.config import TEMPLATE_DIR
from harbench.errors import RejectedConfigError

#


@dataclass
class ReportTemplate:
  template: str
  metadata: dict[str, Any] = field(default_factory=dict)

  def __str__(self) -> str:
    return self.template

  @classmethod
  def from_markdown_file(
    cls, file_path: str
  ) -> "ReportTemplate":
    """
    Create a template from a markdown file.
    """
    post = frontmatter.load(file_path)
    if not post.content.strip():
      raise RejectedConfigError(
        f"Template {file_path} has no content"
      )
    return cls(
      template=post.content, metadata=dict(post.metadata)
    )

  def setting(self, name: str, default: Any) -> Any:
    return self.metadata.get(name, default)

  def render(self, **kwargs: Any) -> str:
    """
    Render with the frontmatter settings available
    as `meta`.
    """
    template = Template(
      self.template,
      undefined=StrictUndefined,
      trim_blocks=True,
      lstrip_blocks=True,
    )
    return template.render(meta=self.metadata, **kwargs)


def load_template(
  name: str,
  template_dir: str = TEMPLATE_DIR,
) -> ReportTemplate:
  """
  Load `<template_dir>/<name>.md`.
  """
  full_path = os.path.join(template_dir, f"{name}.md")
  if not os.path.isfile(full_path):
    raise RejectedConfigError(
      f"No template {name} in {template_dir}"
    )
  logger.debug(f"Loading template from {full_path}")
  return ReportTemplate.from_markdown_file(full_path)
