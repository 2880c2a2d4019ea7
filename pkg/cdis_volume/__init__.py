# Volume types, bundle I/O, phantoms and preprocessing
