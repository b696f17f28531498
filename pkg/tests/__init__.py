# Tests for evanscope
