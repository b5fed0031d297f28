# Runner package
