from django.urls import path
from . import views

app_name = 'experiments'

urlpatterns = [
    # 實驗批次列表
    path('suites/', views.suite_list, name='suite_list'),

    # 單一批次的彙總表
    path('suites/<int:suite_id>/', views.suite_detail, name='suite_detail'),

    # 每回合指標 CSV
    path('suites/<int:suite_id>/metrics.csv', views.suite_metrics_csv, name='suite_metrics_csv'),
]
