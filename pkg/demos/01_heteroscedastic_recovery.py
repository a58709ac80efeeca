"""Can a network learn *where* its data is noisy?

We draw labels whose noise grows with |x_0| and fit a mean/log-variance head.
The predicted standard deviation should track the true one, which the
generator keeps aside for scoring.
"""
import numpy as np

from uqmt import EstimatorConfig, SyntheticScenario, gen_heteroscedastic, train_estimator
from uqmt.nn import TrainingConfig

data = gen_heteroscedastic(SyntheticScenario(n=4000, seed=0))
train, test = data.split([0.8, 0.2])

est = train_estimator(EstimatorConfig("HTS", training=TrainingConfig(epochs=30)), train.strip_oracle())
pred = est.predict(test, calibrated=False)
sigma = test.true_sigma()

print(f"Pearson(predicted sigma, true sigma) = {np.corrcoef(pred.std, sigma)[0, 1]:.3f}")

# a coarse look along x_0
x0 = test.X[:, 0]
edges = np.linspace(-1, 1, 6)
print(f"{'x0 bin':>16} {'true sigma':>11} {'predicted':>10}")
for lo, hi in zip(edges[:-1], edges[1:]):
    m = (x0 >= lo) & (x0 < hi)
    print(f"[{lo:+.1f}, {hi:+.1f}) {sigma[m].mean():>11.3f} {pred.std[m].mean():>10.3f}")
