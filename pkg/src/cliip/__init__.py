"""Contact-graph ranking of likely asymptomatic carriers."""

__version__ = "0.1.0"
