# Input holds params["n_inputs"] equally long client models back to back.
def custom_code(flat):
    k = params.get("n_inputs", 1)
    width = len(flat) // k
    return [sum(flat[i * width + j] for i in range(k)) / k for j in range(width)]
