# v2: midrange of the buffer
def custom_code(samples):
    return (min(samples) + max(samples)) / 2
