# Tests for basis-completion
