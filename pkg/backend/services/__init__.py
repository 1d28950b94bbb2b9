# Pipeline services: signal processing, features, selection, classifiers, evaluation
