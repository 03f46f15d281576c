"""Joint rain and haze removal in the Haar wavelet domain"""
__version__ = "1.0.0"
