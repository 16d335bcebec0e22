"""
segerr APIs. Core data types, containers and the interfaces between the
evaluation, corruption and model components.
"""
