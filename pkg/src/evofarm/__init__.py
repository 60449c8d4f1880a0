"""evofarm: a master/worker evolutionary computation system.

The server owns the population and runs selection; clients only evaluate
fitness.  Work travels as JSON packets of chromosomes over HTTP.
"""

__version__ = "0.1.0"
