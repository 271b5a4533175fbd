"""HTTP service exposing the reconstruction toolkit.

Volumes are large, so the API is file-based: requests name input and
output paths on the server filesystem and responses return summaries
plus the paths of what was written.
"""

from .app import create_app  # noqa: F401
