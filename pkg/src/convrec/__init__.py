"""Knowledge-grounded conversational recommender with time-aware preferences."""

__version__ = "0.1.0"
