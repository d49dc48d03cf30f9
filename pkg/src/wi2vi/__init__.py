"""Video frame generation from WiFi channel state information.

Pipeline stages: channel and silhouette simulation (:mod:`wi2vi.sim`), CSI
features (:mod:`wi2vi.csi`), video preprocessing (:mod:`wi2vi.video`,
:mod:`wi2vi.prep`), synchronization and dropin (:mod:`wi2vi.sync`), the
autodiff kernel (:mod:`wi2vi.autodiff`), the network (:mod:`wi2vi.model`) and
training (:mod:`wi2vi.train`).
"""

__version__ = "0.1.0"
