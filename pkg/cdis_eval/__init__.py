# ROC analysis and the bounded simplex optimizer
