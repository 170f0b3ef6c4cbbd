#pragma once

// libtorch's logging header defines a CHECK macro; doctest's must win.
#include <torch/torch.h>
#undef CHECK
#include <doctest.h>
