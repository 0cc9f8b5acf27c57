# Copyright 2026 The fmdacl Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Dual-network semi-supervised segmentation and multi-label classification."""

try:
    from ._fmdacl import *  # noqa: F401,F403
except ImportError:  # in-tree build: the extension sits next to the package
    from _fmdacl import *  # noqa: F401,F403

__all__ = [
    "ConfigError",
    "config_keys",
    "dac_terms",
    "default_config",
    "dice",
    "f1",
    "fit",
    "gen_synthetic",
    "label_bits",
    "normalize_config",
    "nsd",
    "overall_score",
    "predict",
    "render_sample",
    "score_no_time",
]
