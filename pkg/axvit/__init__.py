"""Approximate-multiplier emulation, quantization, finetuning and search for a toy vision transformer."""
