# Leaklab engines
