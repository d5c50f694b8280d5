"""Independent oracles shared by unit and acceptance tests.

These are deliberately naive (loops, math.log, explicit reachability) so
they stay independent of the vectorized implementations they check.
"""

import math


def naive_loss(params, token_ids, weights, alpha):
    """Straight-line reimplementation of the record loss, no numpy math."""
    E = params.E.tolist()
    W_enc = params.W_enc.tolist()
    b_enc = params.b_enc.tolist()
    W_dec = params.W_dec.tolist()
    b_dec = params.b_dec.tolist()
    U = params.U.tolist()
    c = params.c.tolist()
    d = len(E[0])
    v_size = len(E)

    V = []
    for y in token_ids:
        V.extend(E[y])
    n = len(V)
    m = len(b_enc)

    h = []
    for j in range(m):
        acc = b_enc[j]
        for k in range(n):
            acc += W_enc[j][k] * V[k]
        h.append(math.tanh(acc))

    V_hat = []
    for k in range(n):
        acc = b_dec[k]
        for j in range(m):
            acc += W_dec[k][j] * h[j]
        V_hat.append(acc)

    weighted_ce = 0.0
    for i, y in enumerate(token_ids):
        logits = []
        for t in range(v_size):
            acc = c[t]
            for k in range(d):
                acc += U[t][k] * V_hat[i * d + k]
            logits.append(acc)
        top = max(logits)
        z = sum(math.exp(l - top) for l in logits)
        log_p = (logits[y] - top) - math.log(z)
        weighted_ce += weights[y] * (-log_p)

    recon = sum((V[k] - V_hat[k]) ** 2 for k in range(n))
    return weighted_ce + alpha * recon


def reachable_from_seeds(parent_of, seed_nodes):
    """Transitive closure of the child relation, by iterating to fixpoint."""
    marked = set(seed_nodes)
    changed = True
    while changed:
        changed = False
        for node, parent in parent_of.items():
            if node not in marked and parent in marked:
                marked.add(node)
                changed = True
    return marked


def confusion_matrix(scores, labels, threshold):
    """Brute-force TP/FP/FN/TN with ties at the threshold positive."""
    tp = fp = fn = tn = 0
    for score, malicious in zip(scores, labels):
        predicted = score >= threshold
        if predicted and malicious:
            tp += 1
        elif predicted:
            fp += 1
        elif malicious:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn
