import pytest

from tests.fixtures import *