"""Fragment screening, baseline bases, robustness and dictionary universality."""
