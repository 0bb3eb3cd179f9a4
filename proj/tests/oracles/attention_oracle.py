# Frozen-constant generator: single-head attention on a 2x2 input with
# hand-set projections, evaluated at 60 decimal digits. The C++ unit test
# asserts the printed outputs at 1e-12.
#
#   X  = [[1, 2], [3, -1]]
#   Wq = [[0.5, -0.25], [1.0, 0.75]]
#   Wk = [[-0.3, 0.6], [0.2, 0.1]]
#   Wv = [[1.0, 0.0], [0.0, 1.0]]
#   Wo = [[0.7, -0.2], [0.4, 0.9]]
#   out = softmax(Q K^T / sqrt(2)) V Wo
import mpmath as mp

mp.mp.dps = 60


def matmul(a, b):
    n, k, m = len(a), len(b), len(b[0])
    return [[sum(a[i][t] * b[t][j] for t in range(k)) for j in range(m)] for i in range(n)]


X = [[mp.mpf(1), mp.mpf(2)], [mp.mpf(3), mp.mpf(-1)]]
Wq = [[mp.mpf("0.5"), mp.mpf("-0.25")], [mp.mpf("1.0"), mp.mpf("0.75")]]
Wk = [[mp.mpf("-0.3"), mp.mpf("0.6")], [mp.mpf("0.2"), mp.mpf("0.1")]]
Wv = [[mp.mpf(1), mp.mpf(0)], [mp.mpf(0), mp.mpf(1)]]
Wo = [[mp.mpf("0.7"), mp.mpf("-0.2")], [mp.mpf("0.4"), mp.mpf("0.9")]]

Q = matmul(X, Wq)
K = matmul(X, Wk)
V = matmul(X, Wv)
s = [[sum(Q[i][t] * K[j][t] for t in range(2)) / mp.sqrt(2) for j in range(2)] for i in range(2)]
A = []
for row in s:
    m = max(row)
    es = [mp.e**(v - m) for v in row]
    z = sum(es)
    A.append([e / z for e in es])
out = matmul(matmul(A, V), Wo)
for row in out:
    print(" ".join(mp.nstr(v, 20) for v in row))
