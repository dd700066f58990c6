"""Bid landscape forecasting from censored second-price auction logs."""
