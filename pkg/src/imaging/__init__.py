"""Image operators and the deblurring experiment."""
