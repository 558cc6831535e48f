"""
Core modules of the csvm package.

This subpackage contains:
- dataset:      CSV loading, standardization, the I/J split and k-means compression.
- kernel:       kernel functions and Gram matrices.
- metrics:      rates, Hoeffding-adjusted targets and count constraints.
- qp:           the node quadratic program and its ADMM solver.
- bnb:          branch-and-bound over the anchor indicators.
- baselines:    standard SVM, SVM(C+,C-) and sliding beta.
- evalharness:  nested cross-validation comparing the methods.
- model_io:     the text model file.
- run_helpers:  data paths, dataset registry and run bookkeeping.
- excel_utils:  Excel report writer.
- logging_utils: run-scoped logging helpers.
"""
