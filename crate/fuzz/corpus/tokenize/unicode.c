int été = 1e-5f;