"""formhwr: type-aware handwriting recognition for structured forms.

Subsystems: typed text generation (typedgen), rendering and augmentation
(imaging, fonts), dataset emission and preprocessing (formset), CTC loss
and decoding (ctc), the recognizer network and trainer (recognizer),
template alignment (alignkit), evaluation metrics (metrics), and the
glyph-ambiguity testbed (testbed).
"""

__version__ = "0.1.0"
