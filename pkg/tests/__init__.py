# Tests for graphflow-engine
