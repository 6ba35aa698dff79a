"""Clearance-field learning and safe navigation for 2-D rigid robots.

The package is organised bottom-up:

* :mod:`lsbnav.geometry`  -- boundary-sampled shapes, clearance, safety balls
* :mod:`lsbnav.maps`      -- map / shape file IO and builtin environments
* :mod:`lsbnav.dataset`   -- clearance sample generation and normalisation
* :mod:`lsbnav.net`       -- residual MLP regressor (pure numpy)
* :mod:`lsbnav.cbf`       -- discrete-time high-order barrier recursions
* :mod:`lsbnav.control`   -- per-step NLP around a unicycle model
* :mod:`lsbnav.sim`       -- closed-loop simulation and auditing
* :mod:`lsbnav.svg`       -- plot emission (plain SVG, no plotting deps)
* :mod:`lsbnav.cli`       -- command line front end
"""

__version__ = "0.1.0"
