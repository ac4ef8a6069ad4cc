RESULTS = []


def record(name, passed, detail=""):
    RESULTS.append((name, passed, detail))
