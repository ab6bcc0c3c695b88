def custom_code(samples):
    return sum(samples) / len(samples)
