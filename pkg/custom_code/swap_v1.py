# v1: arithmetic mean of the buffer
def custom_code(samples):
    return sum(samples) / len(samples)
