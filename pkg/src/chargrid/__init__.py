"""Document field extraction on character grids.

A page of OCR characters becomes a grid of character indices; an
encoder-decoder network labels every grid cell with a field class and
detects line-item rows; the labels are read back as field strings.
"""

__version__ = "0.1.0"
