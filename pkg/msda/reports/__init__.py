from .path_chart import PLOTEXT_AVAILABLE, path_chart
from .study_table import study_table, study_text

__all__ = ['path_chart', 'study_table', 'study_text', 'PLOTEXT_AVAILABLE']
